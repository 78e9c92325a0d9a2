use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use blobcg::analytic::{cylinder_response, rect_response_1d, sphere_response, QuantizationBounds};
use blobcg::detect::{detect_nonsolid, detect_solid, write_candidates_file, DetectionConfig};
use blobcg::evaluate::{match_candidates, read_truth_file};
use blobcg::io::{read_header, read_mask, read_volume, write_volume};
use blobcg::logfilter::respond_all_scales;
use blobcg::phantom::{sweep_rows_csv, sweep_sphere_cylinder, sweep_sphere_wall, Primitive, Scene, SweepConfig};
use blobcg::scaleplan::DEFAULT_MAX_K;
use blobcg::{Grid, Mask3D, ScalePlan, Units};
use clap::{Args, Parser, Subcommand, ValueEnum};

const WORKERS_ENV: &str = "BLOBCG_WORKERS";

/// Multiscale LoG blob candidate generator for 3D volumes.
#[derive(Parser)]
#[command(name = "blobcg", version)]
struct Cli {
    /// Worker threads (default: all cores, or $BLOBCG_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the scale plan.
    PlanScales {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, value_enum, default_value_t = TableFormat::Table)]
        format: TableFormat,
        /// Largest acceptable scale ratio.
        #[arg(long, default_value_t = DEFAULT_MAX_K)]
        max_k: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate candidates from a volume.
    Detect(DetectArgs),
    /// Rasterize a scene description or a built-in preset.
    Phantom {
        /// Scene JSON file.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        scene: Option<PathBuf>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 3)]
        supersample: usize,
        /// Output volume header (the payload is written next to it).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an interference sweep and print the table.
    Simulate {
        #[arg(long, value_enum)]
        mode: SweepMode,
        /// Sphere diameter in mm.
        #[arg(long, default_value_t = 10.0)]
        d: f64,
        /// Comma-separated distances in sphere diameters, descending.
        #[arg(long, value_delimiter = ',')]
        distances: Option<Vec<f64>>,
        #[arg(long, default_value_t = 128)]
        dims: usize,
        #[arg(long, default_value_t = 3)]
        supersample: usize,
        #[arg(long, default_value_t = 5.0)]
        dmin: f64,
        #[arg(long, default_value_t = 20.0)]
        dmax: f64,
        #[arg(long, default_value_t = 31)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Match candidates against reference nodules.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        /// Volume header providing the voxel grid.
        #[arg(long)]
        volume: PathBuf,
        /// Report JSON (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-nodule CSV.
        #[arg(long)]
        per_nodule: Option<PathBuf>,
    },
    /// Tabulate the analytic response curves.
    Analytic {
        #[arg(long, value_enum, default_value_t = Curve::Response)]
        curve: Curve,
        /// Object diameter for response curves.
        #[arg(long, default_value_t = 10.0)]
        d: f64,
        /// Upper end of the sigma (response) or k (quantization) axis.
        #[arg(long)]
        max: Option<f64>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Copy)]
struct PlanArgs {
    #[arg(long, default_value_t = 3.0)]
    dmin: f64,
    #[arg(long, default_value_t = 25.0)]
    dmax: f64,
    #[arg(long, default_value_t = 10)]
    n: usize,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long, value_enum, default_value_t = Mode::Solid)]
    mode: Mode,
    #[arg(long)]
    volume: PathBuf,
    /// Region mask; the whole volume when omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    plan: PlanArgs,
    /// Minimum response (default 226 in solid mode, none in nonsolid mode).
    #[arg(long, conflicts_with = "no_threshold")]
    threshold: Option<f64>,
    #[arg(long)]
    no_threshold: bool,
    /// Intensity window level for nonsolid mode.
    #[arg(long, default_value_t = blobcg::detect::NONSOLID_WINDOW_HU)]
    window: f64,
    #[arg(long, default_value_t = blobcg::detect::DEFAULT_DILATION_MM)]
    dilation: f64,
    /// Also write the response at this plan index as a volume.
    #[arg(long, requires = "dump_out")]
    dump_scale: Option<usize>,
    #[arg(long)]
    dump_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Table,
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Solid,
    Nonsolid,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    Cyl,
    Wall,
}

#[derive(Clone, Copy, ValueEnum)]
enum Curve {
    /// Sphere, cylinder and 1D rectangle responses against sigma.
    Response,
    /// Dip response and size error bounds against the scale ratio.
    Quantization,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Three unit spheres (4.81, 9.74, 19.75 mm) in a 128^3 volume.
    ThreeSpheres,
    /// Faint -680 HU sphere with a -200 HU vessel segment, 96^3.
    Nonsolid,
    /// Solid -474 HU sphere next to a 3 mm vessel, 96^3.
    SolidVessel,
}

fn preset_scene(p: Preset) -> Scene {
    match p {
        Preset::ThreeSpheres => Scene::new(Grid::cube(128), 0.0, Units::Unitless)
            .with(Primitive::sphere([32.0; 3], 4.8056, 1.0))
            .with(Primitive::sphere([90.0, 40.0, 40.0], 9.7429, 1.0))
            .with(Primitive::sphere([60.0, 88.0, 80.0], 19.7527, 1.0)),
        Preset::Nonsolid => Scene::new(Grid::cube(96), -810.0, Units::Hu)
            .with(Primitive::sphere([48.0; 3], 15.0, -680.0))
            .with(Primitive::cylinder_segment([51.0, 48.0, 48.0], [0.0, 0.0, 1.0], 3.0, 8.0, -200.0)),
        Preset::SolidVessel => Scene::new(Grid::cube(96), -810.0, Units::Hu)
            .with(Primitive::sphere([33.0, 48.0, 48.0], 9.7429, -474.0))
            .with(Primitive::cylinder([63.0, 48.0, 0.0], [0.0, 0.0, 1.0], 3.0, -474.0)),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn build_plan(p: PlanArgs) -> Result<ScalePlan> {
    ScalePlan::build(p.dmin, p.dmax, p.n).context("building scale plan")
}

fn configure_workers(flag: Option<usize>) -> Result<()> {
    let from_env = match std::env::var(WORKERS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .with_context(|| format!("{WORKERS_ENV}={v} is not a worker count"))?,
        ),
        Err(_) => None,
    };
    // an explicit flag may not exceed the environment cap
    let n = match (flag, from_env) {
        (Some(f), Some(e)) => Some(f.min(e)),
        (f, e) => f.or(e),
    };
    if let Some(n) = n {
        if n == 0 {
            bail!("worker count must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    Ok(())
}

fn ensure_writable_dir(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!("{}: output directory does not exist", path.display());
    }
    Ok(())
}

fn run_detect(a: &DetectArgs) -> Result<()> {
    let plan = build_plan(a.plan)?;
    ensure_writable_dir(&a.out)?;
    if let Some(p) = &a.dump_out {
        ensure_writable_dir(p)?;
    }
    let volume = read_volume(&a.volume)?;
    let mask = match &a.mask {
        Some(p) => read_mask(p)?,
        None => Mask3D::full(*volume.grid()),
    };
    let mut cfg = match a.mode {
        Mode::Solid => DetectionConfig::solid(),
        Mode::Nonsolid => DetectionConfig {
            window_t: Some(a.window),
            ..DetectionConfig::nonsolid()
        },
    };
    if let Some(t) = a.threshold {
        cfg.response_threshold = Some(t);
    }
    if a.no_threshold {
        cfg.response_threshold = None;
    }
    cfg.dilation_radius_mm = a.dilation;
    let cands = match a.mode {
        Mode::Solid => detect_solid(&volume, &mask, &plan, &cfg)?,
        Mode::Nonsolid => detect_nonsolid(&volume, &mask, &plan, &cfg)?,
    };
    write_candidates_file(&a.out, &cands)?;
    log::info!("{} candidates written to {}", cands.len(), a.out.display());

    if let (Some(i), Some(path)) = (a.dump_scale, &a.dump_out) {
        let input = match (a.mode, cfg.window_t) {
            (Mode::Nonsolid, Some(t)) => blobcg::volume::window_clamp(&volume, t)?,
            _ => volume,
        };
        let stack = respond_all_scales(&input, &plan)?;
        stack.write_scale(i, path)?;
    }
    Ok(())
}

fn analytic_table(curve: Curve, d: f64, max: Option<f64>, steps: usize) -> Result<String> {
    if steps < 2 {
        bail!("--steps must be at least 2");
    }
    let mut s = String::new();
    match curve {
        Curve::Response => {
            let hi = max.unwrap_or(d);
            s.push_str("sigma_mm,sphere,cylinder,rect_1d\n");
            for i in 1..=steps {
                let sigma = hi * i as f64 / steps as f64;
                s.push_str(&format!(
                    "{sigma:.4},{:.4},{:.4},{:.4}\n",
                    sphere_response(sigma, d)?,
                    cylinder_response(sigma, d)?,
                    rect_response_1d(sigma, d)?
                ));
            }
        }
        Curve::Quantization => {
            let hi = max.unwrap_or(2.0);
            if hi <= 1.0 {
                bail!("--max must exceed 1 for the quantization curve");
            }
            s.push_str("k,r_dip,d_ue,d_oe\n");
            for i in 1..=steps {
                let k = 1.0 + (hi - 1.0) * i as f64 / steps as f64;
                let q = QuantizationBounds::for_ratio(k)?;
                s.push_str(&format!("{:.4},{:.4},{:.4},{:.4}\n", q.k, q.r_dip, q.d_ue, q.d_oe));
            }
        }
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    configure_workers(cli.workers)?;
    match cli.command {
        Command::PlanScales {
            plan,
            format,
            max_k,
            out,
        } => {
            let p = build_plan(plan)?;
            for v in p.validate(max_k) {
                eprintln!("warning: {v}");
            }
            let text = match format {
                TableFormat::Table => p.to_table(),
                TableFormat::Csv => p.to_csv(),
                TableFormat::Json => serde_json::to_string_pretty(&p)? + "\n",
            };
            emit(out.as_deref(), &text)
        }
        Command::Detect(a) => run_detect(&a),
        Command::Phantom {
            scene,
            preset,
            supersample,
            out,
        } => {
            let scene = match (scene, preset) {
                (Some(path), _) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<Scene>(&text).with_context(|| format!("{}: bad scene", path.display()))?
                }
                (None, Some(p)) => preset_scene(p),
                (None, None) => unreachable!("clap requires one of --scene/--preset"),
            };
            let v = scene.rasterize(supersample)?;
            write_volume(&out, &v)?;
            Ok(())
        }
        Command::Simulate {
            mode,
            d,
            distances,
            dims,
            supersample,
            dmin,
            dmax,
            n,
            out,
        } => {
            let cfg = SweepConfig {
                dims,
                supersample,
                plan: build_plan(PlanArgs { dmin, dmax, n })?,
                ..SweepConfig::default()
            };
            let rows = match mode {
                SweepMode::Cyl => {
                    let ds = distances.unwrap_or_else(|| vec![2.0, 1.5, 1.0, 0.75, 0.6, 0.45, 0.3, 0.2]);
                    sweep_sphere_cylinder(d, &ds, &cfg)?
                }
                SweepMode::Wall => {
                    let ds = distances.unwrap_or_else(|| vec![2.0, 1.5, 1.0, 0.75, 0.5, 0.25]);
                    sweep_sphere_wall(d, &ds, &cfg)?
                }
            };
            emit(out.as_deref(), &sweep_rows_csv(&rows))
        }
        Command::Evaluate {
            truth,
            candidates,
            volume,
            out,
            per_nodule,
        } => {
            let grid = read_header(&volume)?
                .grid()
                .with_context(|| format!("{}: bad grid", volume.display()))?;
            let truth = read_truth_file(&truth, &grid)?;
            let cands = blobcg::detect::read_candidates_file(&candidates)?;
            let report = match_candidates(&truth, &cands)?;
            emit(out.as_deref(), &report.to_json())?;
            if let Some(p) = per_nodule {
                emit(Some(&p), &report.per_nodule_csv())?;
            }
            Ok(())
        }
        Command::Analytic {
            curve,
            d,
            max,
            steps,
            out,
        } => emit(out.as_deref(), &analytic_table(curve, d, max, steps)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
