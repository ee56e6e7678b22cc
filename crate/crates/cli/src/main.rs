//! `gradstyle` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
//! 3 numeric failure.

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradstyle::imageio::{load_image, save_image};
use gradstyle::reconstruct::{DEFAULT_CG_TOL, DEFAULT_LAMBDA};
use gradstyle::styles::{make_pairs, StyleOp};
use gradstyle::synthetic::synthetic_image;
use gradstyle::train::{Checkpoint, LossRecord};
use gradstyle::video::{interframe_mse, stylize_sequence, write_mse_csv, FrameSequence};
use gradstyle::{
    stylize, threads_from_env, Error, PairDataset32, Result, Solver, StyleNet32, StylizeOptions, Tensor32, TrainConfig,
    Trainer32, VggTrunk32,
};

#[derive(Parser)]
#[command(name = "gradstyle", version, about = "Gradient-domain image stylization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on a directory of (input, style) pairs.
    Train(TrainArgs),
    /// Stylize one image.
    Stylize(StylizeArgs),
    /// Stylize every frame of a numbered frame directory.
    StylizeVideo(VideoArgs),
    /// Inter-frame MSE of a numbered frame directory.
    EvalConsistency(EvalArgs),
    /// Build a pair directory with a synthetic style operator.
    MakePairs(PairsArgs),
    /// Write a randomly initialised VGG trunk (for the perceptual loss when
    /// no pretrained weights are at hand).
    InitTrunk(TrunkArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Colour-fidelity weight of the reconstruction.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value = "cg")]
    solver: Solver,
    /// Relative residual at which CG stops.
    #[arg(long, default_value_t = DEFAULT_CG_TOL)]
    cg_tol: f64,
}

impl SolveArgs {
    fn options(&self) -> StylizeOptions {
        StylizeOptions {
            lambda: self.lambda,
            solver: self.solver,
            cg_tol: self.cg_tol,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Pair directory with `input/` and `style/` subdirectories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// `key = value` training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// VGG trunk weights; required when beta > 0.
    #[arg(long)]
    vgg: Option<PathBuf>,
    /// Single-stage run of this many iterations.
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Continue from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print losses every this many iterations.
    #[arg(long, default_value_t = 100)]
    log_every: u64,
    /// Where to write the trained network.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct StylizeArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args)]
struct VideoArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    frames_dir: PathBuf,
    /// Output directory for the stylized frames.
    #[arg(long)]
    output: PathBuf,
    /// Also write the stylized sequence's inter-frame MSE here.
    #[arg(long)]
    mse_csv: Option<PathBuf>,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    frames_dir: PathBuf,
    /// CSV output; printed to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PairsArgs {
    /// Directory of PNG/PPM images.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Generate this many procedural images instead of reading `--input`.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Side length of generated images.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Seed of the first generated image.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// identity, posterize-N, smooth, exaggerate or cartoon.
    #[arg(long)]
    style: StyleOp,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrunkArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::Io { .. } | Error::Image { .. } | Error::Format(_) | Error::MissingLayer(_) => 2,
        Error::ShapeMismatch { .. } | Error::NonFinite { .. } | Error::NotConverged { .. } | Error::NonFiniteLoss { .. } => 3,
    }
}

fn not_found(path: &Path, what: &str) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: io::Error::new(io::ErrorKind::NotFound, format!("{what} not found")),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(not_found(path, "file"))
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(not_found(path, "directory"))
    }
}

/// The directory an output file will be created in must exist.
fn require_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => require_dir(p),
        _ => Ok(()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p)?;
            TrainConfig::from_file(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.alpha {
        cfg.weights.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.weights.beta = v;
    }
    if let Some(v) = a.iterations {
        cfg.iterations_stage1 = v;
        cfg.iterations_stage2 = 0;
    }
    for (slot, v) in [
        (&mut cfg.data_dir, a.data),
        (&mut cfg.vgg, a.vgg),
        (&mut cfg.checkpoint_dir, a.checkpoint_dir),
        (&mut cfg.loss_csv, a.loss_csv),
    ] {
        if v.is_some() {
            *slot = v;
        }
    }
    cfg.validate()?;

    let data = cfg
        .data_dir
        .clone()
        .ok_or_else(|| Error::InvalidArgument("no training data: pass --data or set data_dir".into()))?;
    require_dir(&data)?;
    if let Some(p) = &cfg.vgg {
        require_file(p)?;
    }
    if let Some(p) = &a.resume {
        require_file(p)?;
    }
    if let Some(p) = &cfg.loss_csv {
        require_parent(p)?;
    }
    require_parent(&a.output)?;
    if cfg.weights.beta > 0.0 && cfg.vgg.is_none() {
        return Err(Error::InvalidArgument("beta > 0 needs a VGG trunk (--vgg); use --beta 0 to train without it".into()));
    }

    let trunk = match (&cfg.vgg, cfg.weights.beta > 0.0) {
        (Some(p), true) => Some(VggTrunk32::load(p)?),
        _ => None,
    };
    let ds = PairDataset32::from_dir(&data)?;
    println!("{} training pairs from {}", ds.len(), data.display());
    let mut trainer = match &a.resume {
        Some(p) => Trainer32::resume(cfg.clone(), Checkpoint::load(p)?, trunk)?,
        None => Trainer32::new(cfg.clone(), StyleNet32::build(cfg.seed), trunk)?,
    };
    let every = a.log_every.max(1);
    let total = cfg.total_iterations();
    trainer.run(&ds, |r: &LossRecord| {
        if r.iteration % every == 0 || r.iteration == total {
            println!(
                "iter {:>7}  total {:.6e}  pixel {:.6e}  feat {:.6e}",
                r.iteration, r.total, r.pixel, r.feat
            );
        }
    })?;
    trainer.net().save(&a.output)?;
    println!("wrote {} after {} iterations", a.output.display(), trainer.iteration());
    Ok(())
}

fn cmd_stylize(a: StylizeArgs) -> Result<()> {
    require_file(&a.weights)?;
    require_file(&a.input)?;
    require_parent(&a.output)?;
    let net = StyleNet32::load(&a.weights)?;
    let image: Tensor32 = load_image(&a.input)?;
    let out = stylize(&net, &image, &a.solve.options())?;
    save_image(&out.image, &a.output)?;
    let t = out.timing;
    println!(
        "{}x{}: network {:.3}s, reconstruction {:.3}s, total {:.3}s (CG iterations {:?})",
        image.shape().w,
        image.shape().h,
        t.network.as_secs_f64(),
        t.reconstruction.as_secs_f64(),
        t.total.as_secs_f64(),
        out.cg_iterations
    );
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn video(a: VideoArgs) -> Result<()> {
    require_file(&a.weights)?;
    require_dir(&a.frames_dir)?;
    if let Some(p) = &a.mse_csv {
        require_parent(p)?;
    }
    let net = StyleNet32::load(&a.weights)?;
    let frames = FrameSequence::<f32>::load(&a.frames_dir)?;
    let start = std::time::Instant::now();
    let styled = stylize_sequence(&net, &frames, &a.solve.options())?;
    println!("stylized {} frames in {:.2}s", styled.len(), start.elapsed().as_secs_f64());
    create_dir(&a.output)?;
    styled.save(&a.output, "png")?;
    if styled.len() >= 2 {
        let (before, after) = (interframe_mse(&frames)?, interframe_mse(&styled)?);
        println!("mean inter-frame MSE: input {:.6e}, stylized {:.6e}", mean(&before), mean(&after));
        if let Some(p) = &a.mse_csv {
            write_mse_csv(p, &after)?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    require_dir(&a.frames_dir)?;
    if let Some(p) = &a.output {
        require_parent(p)?;
    }
    let frames = FrameSequence::<f32>::load(&a.frames_dir)?;
    let mse = interframe_mse(&frames)?;
    match &a.output {
        Some(p) => {
            write_mse_csv(p, &mse)?;
            println!("{} pairs, mean MSE {:.6e}", mse.len(), mean(&mse));
        }
        None => {
            println!("frame_index,mse");
            for (k, m) in mse.iter().enumerate() {
                println!("{},{m}", k + 2);
            }
        }
    }
    Ok(())
}

fn pairs(a: PairsArgs) -> Result<()> {
    let written = match (&a.input, a.synthetic) {
        (Some(dir), _) => {
            require_dir(dir)?;
            make_pairs(dir, a.style, &a.output)?
        }
        (None, Some(n)) => {
            if n == 0 || a.size == 0 {
                return Err(Error::InvalidArgument("--synthetic and --size must be positive".into()));
            }
            let scratch = a.output.join("generated");
            create_dir(&scratch)?;
            for i in 0..n {
                let img: Tensor32 = synthetic_image(a.seed + i as u64, a.size, a.size);
                save_image(&img, scratch.join(format!("synthetic_{i:04}.png")))?;
            }
            let names = make_pairs(&scratch, a.style, &a.output)?;
            std::fs::remove_dir_all(&scratch).map_err(|source| Error::Io { path: scratch, source })?;
            names
        }
        (None, None) => unreachable!("clap requires --input or --synthetic"),
    };
    println!("wrote {} pairs ({}) to {}", written.len(), a.style, a.output.display());
    Ok(())
}

fn init_trunk(a: TrunkArgs) -> Result<()> {
    require_parent(&a.output)?;
    VggTrunk32::random(a.seed).save(&a.output)?;
    println!("wrote random VGG trunk (seed {}) to {}", a.seed, a.output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train(a) => train(a),
        Command::Stylize(a) => cmd_stylize(a),
        Command::StylizeVideo(a) => video(a),
        Command::EvalConsistency(a) => eval(a),
        Command::MakePairs(a) => pairs(a),
        Command::InitTrunk(a) => init_trunk(a),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
