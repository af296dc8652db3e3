use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rigidflow::imgproc::{
    load_image, load_instance_map, load_mask, read_flow_png, save_rgb8, write_flow_png, FlowField,
    InstanceMap, Mask,
};
use rigidflow::matchnet::save_checkpoint;
use rigidflow::pipeline::{
    evaluate_fl, load_bundle, load_toml, make_synthetic_scene, run, train_matcher, EvalReport,
    MatcherTrainingConfig, PipelineConfig, SceneSpec, CONFIG_ENV,
};

mod viz;

#[derive(Parser)]
#[command(name = "flow", version, about = "Object-aware monocular optical flow")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the flow from the first frame to the second.
    Estimate {
        #[arg(long)]
        image1: PathBuf,
        #[arg(long)]
        image2: PathBuf,
        /// Instance label PNG (0 = background); all background if omitted.
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Pipeline configuration (TOML).
        #[arg(long, env = CONFIG_ENV)]
        config: Option<PathBuf>,
        /// Overrides the configured matcher checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output flow PNG (KITTI encoding).
        #[arg(long)]
        out: PathBuf,
        /// Run report; defaults to the output path with a `.txt` extension.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fl outlier rates of an estimate against ground truth.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        /// Ground-truth flow PNG.
        #[arg(long, required_unless_present = "bundle")]
        truth: Option<PathBuf>,
        /// Non-occluded mask PNG; every ground-truth pixel if omitted.
        #[arg(long)]
        noc: Option<PathBuf>,
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Scene directory written by `synth`, in place of the three above.
        #[arg(long, conflicts_with_all = ["truth", "noc", "instances"])]
        bundle: Option<PathBuf>,
    },
    /// Render synthetic scenes with exact ground truth.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Scene parameters (TOML); defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory; scene `n` goes to `<out>/<seed + n>`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a matcher on synthetic scenes.
    Train {
        /// Training parameters (TOML); defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output checkpoint (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the default pipeline configuration (TOML).
    Config,
    /// Render flow or flow error as colour images.
    Viz {
        #[command(subcommand)]
        what: Viz,
    },
}

#[derive(Subcommand)]
enum Viz {
    /// Colour-wheel rendering of a flow PNG.
    Flow {
        #[arg(long)]
        flow: PathBuf,
        /// Magnitude of full saturation; the largest flow if omitted.
        #[arg(long)]
        max_flow: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error map of an estimate against ground truth.
    Error {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

type BoxResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

fn estimate(
    image1: &Path,
    image2: &Path,
    instances: Option<&Path>,
    config: Option<&Path>,
    checkpoint: Option<PathBuf>,
    out: &Path,
    report: Option<&Path>,
) -> BoxResult<()> {
    let mut cfg = match config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if checkpoint.is_some() {
        cfg.checkpoint = checkpoint;
    }
    cfg.validate()?;
    let img1 = load_image::<f64>(image1)?;
    let img2 = load_image::<f64>(image2)?;
    let map = match instances {
        Some(path) => load_instance_map(path)?,
        None => InstanceMap::background(img1.width(), img1.height()),
    };
    let output = run(&img1, &img2, &map, &cfg)?;
    write_flow_png(&output.flow, out)?;
    let report_path = report.map_or_else(|| out.with_extension("txt"), Path::to_path_buf);
    std::fs::write(&report_path, output.report.to_text())?;
    log::info!("wrote {} and {}", out.display(), report_path.display());
    Ok(())
}

fn eval(
    estimate: &Path,
    truth: Option<&Path>,
    noc: Option<&Path>,
    instances: Option<&Path>,
    bundle: Option<&Path>,
) -> BoxResult<EvalReport> {
    let est: FlowField<f64> = read_flow_png(estimate)?;
    let (gt, noc, map) = match bundle {
        Some(dir) => {
            let b = load_bundle(dir)?;
            (b.flow, b.noc, b.instances)
        }
        None => {
            let gt: FlowField<f64> = read_flow_png(truth.ok_or("--truth is required")?)?;
            let (w, h) = (gt.width(), gt.height());
            let noc = match noc {
                Some(p) => load_mask(p)?,
                None => Mask::filled(w, h, true),
            };
            let map = match instances {
                Some(p) => load_instance_map(p)?,
                None => InstanceMap::background(w, h),
            };
            (gt, noc, map)
        }
    };
    Ok(evaluate_fl(&est, &gt, &noc, &map)?)
}

fn execute(command: Command) -> BoxResult<()> {
    match command {
        Command::Estimate {
            image1,
            image2,
            instances,
            config,
            checkpoint,
            out,
            report,
        } => estimate(
            &image1,
            &image2,
            instances.as_deref(),
            config.as_deref(),
            checkpoint,
            &out,
            report.as_deref(),
        ),
        Command::Eval {
            estimate,
            truth,
            noc,
            instances,
            bundle,
        } => {
            let r = eval(&estimate, truth.as_deref(), noc.as_deref(), instances.as_deref(), bundle.as_deref())?;
            print!("{}", r.to_table());
            Ok(())
        }
        Command::Synth {
            seed,
            count,
            spec,
            out,
        } => {
            let spec: SceneSpec = match spec {
                Some(p) => load_toml(p)?,
                None => SceneSpec::default(),
            };
            for s in seed..seed + count {
                let scene = make_synthetic_scene(s, &spec)?;
                let dir = out.join(s.to_string());
                scene.write_bundle(&dir)?;
                println!("{}", dir.display());
            }
            Ok(())
        }
        Command::Train { config, out } => {
            let cfg: MatcherTrainingConfig = match config {
                Some(p) => load_toml(p)?,
                None => MatcherTrainingConfig::default(),
            };
            let (net, summary) = train_matcher::<f32>(&cfg)?;
            save_checkpoint(&net, &out)?;
            println!(
                "trained on {} examples, validation accuracy {:.3}",
                summary.examples, summary.validation_accuracy
            );
            Ok(())
        }
        Command::Config => {
            print!("{}", PipelineConfig::default().to_toml_string()?);
            Ok(())
        }
        Command::Viz { what } => match what {
            Viz::Flow { flow, max_flow, out } => {
                let f: FlowField<f64> = read_flow_png(&flow)?;
                save_rgb8(f.width(), f.height(), &viz::flow_to_rgb(&f, max_flow), &out)?;
                Ok(())
            }
            Viz::Error { estimate, truth, out } => {
                let est: FlowField<f64> = read_flow_png(&estimate)?;
                let gt: FlowField<f64> = read_flow_png(&truth)?;
                if (est.width(), est.height()) != (gt.width(), gt.height()) {
                    return Err("estimate and ground truth differ in size".into());
                }
                save_rgb8(gt.width(), gt.height(), &viz::error_to_rgb(&est, &gt), &out)?;
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
