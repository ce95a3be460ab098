use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use raysplat::dataset::load_dataset;
use raysplat::eval::{color_tensor, evaluate};
use raysplat::io::checkpoint::{self, Checkpoint};
use raysplat::io::json::{read_camera, read_json, write_json};
use raysplat::io::pfm::{self, DepthMap};
use raysplat::io::png;
use raysplat::optim::TrainConfig;
use raysplat::pipeline::{initialize, train, TrainState, TrainingData};
use raysplat::synth::{synth_scene, write_scene, SynthConfig};
use raysplat::{gradcheck, par, Error};

#[derive(Parser)]
#[command(name = "raysplat", version, about = "Per-pixel Gaussian splatting from a few posed views")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align depths, segment and build the initial checkpoint.
    Init {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        opts: ConfigFlags,
        /// Optimize per-pixel residuals directly instead of through the decoder.
        #[arg(long)]
        no_decoder: bool,
        /// Skip scale/offset alignment of the input depths.
        #[arg(long)]
        no_align: bool,
        #[arg(long = "channels-C")]
        channels: Option<usize>,
    },
    /// Run (or resume) the training schedule.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Write the result here instead of overwriting the input checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigFlags,
        /// Stop after this many iterations even if the schedule continues.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Render a camera to a PNG plus a normalized-depth PFM.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Output PNG; the depth map goes next to it with a `.pfm` extension.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples_per_pixel: Option<usize>,
    },
    /// Masked metrics on the manifest's held-out views.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for report.json and renders (default: the manifest's output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic two-plane scene and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON scene description; defaults are used for missing files.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        depth_noise: Option<f64>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Options that override fields of the training configuration.
#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    seed: Option<u64>,
    /// Divide the iteration schedule by this factor.
    #[arg(long)]
    iters_scale: Option<f64>,
    #[arg(long)]
    samples_per_pixel: Option<usize>,
    #[arg(long)]
    beta_m: Option<f64>,
    #[arg(long)]
    beta_f: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
}

impl ConfigFlags {
    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.iters_scale {
            c.scale_factor = v;
        }
        if let Some(v) = self.samples_per_pixel {
            c.samples_per_pixel = v;
        }
        if let Some(v) = self.beta_m {
            c.weights.beta_m = v;
        }
        if let Some(v) = self.beta_f {
            c.weights.beta_f = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Init {
            manifest,
            checkpoint,
            opts,
            no_decoder,
            no_align,
            channels,
        } => {
            let mut config = TrainConfig::default();
            opts.apply(&mut config);
            if let Some(c) = channels {
                config.channels = c;
            }
            config.use_decoder = !no_decoder;
            config.align = !no_align;
            config.validate()?;
            let dataset = load_dataset(&manifest)?;
            let init = initialize(&dataset, &config)?;
            for w in &init.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(a) = &init.alignment {
                for (n, (s, o)) in a.params.scale.iter().zip(&a.params.offset).enumerate() {
                    eprintln!("view {n}: scale {s:.6} offset {o:.6}");
                }
            }
            let ck = Checkpoint {
                config,
                bundle: init.bundle,
                state: TrainState::default(),
            };
            checkpoint::write(&checkpoint, &ck)?;
            eprintln!("{} Gaussians -> {}", ck.bundle.gaussian_count(), checkpoint.display());
        }
        Command::Train {
            manifest,
            checkpoint,
            out,
            opts,
            max_steps,
        } => {
            let mut ck = checkpoint::read(&checkpoint)?;
            opts.apply(&mut ck.config);
            ck.config.validate()?;
            let dataset = load_dataset(&manifest)?;
            let data = TrainingData::new(&dataset, &ck.config)?;
            let total = ck.config.scaled_total();
            let every = (total / 20).max(1);
            train(&mut ck.bundle, &data, &ck.config, &mut ck.state, max_steps, |r| {
                if (r.iteration + 1) % every == 0 || r.iteration + 1 == total {
                    eprintln!(
                        "iter {:>6}/{total} view {} loss {:.5} photo {:.5} flow {:.5}",
                        r.iteration + 1,
                        r.view,
                        r.total,
                        r.photometric,
                        r.flow
                    );
                }
            })?;
            let dst = out.unwrap_or(checkpoint);
            checkpoint::write(&dst, &ck)?;
            eprintln!("iteration {} -> {}", ck.state.iteration, dst.display());
        }
        Command::Render {
            checkpoint,
            camera,
            out,
            samples_per_pixel,
        } => {
            let mut ck = checkpoint::read(&checkpoint)?;
            if let Some(s) = samples_per_pixel {
                ck.config.samples_per_pixel = s;
            }
            let cam = read_camera(&camera)?;
            let r = ck.bundle.render(&cam, &ck.config)?;
            png::write(&out, &color_tensor(&r))?;
            let depth = DepthMap {
                width: r.width,
                height: r.height,
                data: r.normalized_depth(),
            };
            pfm::write(&out.with_extension("pfm"), &depth)?;
        }
        Command::Eval {
            manifest,
            checkpoint,
            out,
        } => {
            let ck = checkpoint::read(&checkpoint)?;
            let dataset = load_dataset(&manifest)?;
            let (report, renders) = evaluate(&ck.bundle, &dataset, &ck.config, ck.state.iteration)?;
            let json = serde_json::to_string_pretty(&report).context("serializing report")?;
            println!("{json}");
            if let Some(dir) = out.or_else(|| dataset.output.clone()) {
                write_json(&dir.join("report.json"), &report)?;
                for (v, r) in dataset.heldout.iter().zip(&renders) {
                    png::write(&dir.join(format!("{}_render.png", v.name)), &color_tensor(r))?;
                }
            }
        }
        Command::Synth {
            out,
            config,
            seed,
            depth_noise,
        } => {
            let mut cfg: SynthConfig = match &config {
                Some(p) => read_json(p)?,
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = depth_noise {
                cfg.depth_noise = n;
            }
            let scene = synth_scene(&cfg)?;
            let manifest = write_scene(&scene, &out)?;
            println!("{}", manifest.display());
        }
        Command::Gradcheck { trials, seed } => {
            if trials == 0 {
                bail!(Error::Invalid("--trials must be positive".into()));
            }
            let reports = gradcheck::run_suite(trials, seed)?;
            let mut failed = 0;
            for r in &reports {
                let status = if r.passed { "ok" } else { "FAIL" };
                println!("{:<28} max rel err {:.3e} (tol {:.0e}) {status}", r.name, r.max_rel_err, r.tolerance);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                return Err(GradcheckFailed(failed).into());
            }
        }
    }
    Ok(())
}

#[derive(Debug)]
struct GradcheckFailed(usize);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} operation(s) failed the gradient check", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

/// 1: usage or invalid argument, 2: bad input data, 3: numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<GradcheckFailed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NonFinite(_)) => 3,
        Some(e) if e.is_data_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let threads = cli.threads;
    match par::with_threads(threads, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
