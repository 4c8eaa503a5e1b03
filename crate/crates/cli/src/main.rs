//! Command-line front end: dataset synthesis, training, inference, gradient
//! checking, and channel statistics. Exit codes: 0 success, 1 usage or
//! config error, 2 data/io/checkpoint error, 3 numeric abort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ecpnet::config::RunConfig;
use ecpnet::data::{center_crop, Dataset, SynthSpec};
use ecpnet::error::{Error, Result};
use ecpnet::gradcheck;
use ecpnet::imageio::{load_image, save_image};
use ecpnet::metrics::channel_means;
use ecpnet::tensor::Tensor;
use ecpnet::train::{load_checkpoint, peek_config, train, LogRecord};

#[derive(Parser)]
#[command(
    name = "ecpnet",
    version,
    about = "Blind image deblurring with dark/bright channel priors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic blurred/sharp dataset (sharp/, blur/, manifest.json).
    Synth(SynthArgs),
    /// Train a model on a paired dataset.
    Train(TrainArgs),
    /// Deblur one image with a trained checkpoint.
    Infer(InferArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Report dark/bright channel statistics of images.
    Stats(StatsArgs),
}

/// Config resolution shared by synth and train: defaults, then the file,
/// then flags. Values are funneled through the config parser so errors
/// name their source ("flag --lr").
#[derive(Args, Default)]
struct Overrides {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    #[arg(long, value_name = "N")]
    scales: Option<String>,
    #[arg(long, value_name = "N")]
    base_channels: Option<String>,
    /// Comma-separated odd extraction windows, finest scale first.
    #[arg(long, value_name = "LIST")]
    windows: Option<String>,
    /// Prior (dark/bright channel) branches: on or off.
    #[arg(long, value_name = "on|off")]
    ecp: Option<String>,
    /// Cross-scale feature exchange: on or off.
    #[arg(long, value_name = "on|off")]
    ife: Option<String>,
    #[arg(long, value_name = "N")]
    iters: Option<String>,
    #[arg(long, value_name = "F")]
    lr: Option<String>,
    /// Dark-channel loss weight.
    #[arg(long, value_name = "F")]
    lambda: Option<String>,
    /// Bright-channel loss weight.
    #[arg(long, value_name = "F")]
    omega: Option<String>,
    #[arg(long, value_name = "N")]
    batch: Option<String>,
    #[arg(long, value_name = "N")]
    patch: Option<String>,
    #[arg(long, value_name = "F")]
    noise_sigma: Option<String>,
}

impl Overrides {
    fn apply_flags(&self, cfg: &mut RunConfig) -> Result<()> {
        let flags: [(&str, &Option<String>); 13] = [
            ("seed", &self.seed),
            ("scales", &self.scales),
            ("base_channels", &self.base_channels),
            ("windows", &self.windows),
            ("ecp", &self.ecp),
            ("ife", &self.ife),
            ("iters", &self.iters),
            ("lr", &self.lr),
            ("lambda", &self.lambda),
            ("omega", &self.omega),
            ("batch", &self.batch),
            ("patch", &self.patch),
            ("noise_sigma", &self.noise_sigma),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.apply(key, v, &format!("flag --{}", key.replace('_', "-")))?;
            }
        }
        Ok(())
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply_flags(&mut cfg)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Number of pairs (config key synth_count).
    #[arg(long, value_name = "N")]
    count: Option<String>,
    /// Square image size (synth_size).
    #[arg(long, value_name = "N")]
    size: Option<String>,
    /// Largest kernel support, odd (synth_max_support).
    #[arg(long, value_name = "N")]
    max_support: Option<String>,
    /// Identity kernels instead of trajectories (synth_delta).
    #[arg(long, value_name = "on|off")]
    delta: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset root with sharp/ and blur/ (as written by synth).
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Continue from this checkpoint; its stored config is the base
    /// (only the iteration budget may change).
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Stop once held-out PSNR reaches this many dB.
    #[arg(long, value_name = "F")]
    early_stop_psnr: Option<String>,
}

#[derive(Args)]
struct InferArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    /// Blurred input image (.png or .ppm).
    #[arg(long, value_name = "IMG")]
    input: PathBuf,
    /// Output path (.png or .ppm).
    #[arg(long, value_name = "IMG")]
    output: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Run only cases whose name contains this substring.
    #[arg(long, value_name = "SUBSTR")]
    case: Option<String>,
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StatsArgs {
    /// Image file, directory of images, or dataset root with --pairs.
    #[arg(value_name = "PATH")]
    path: PathBuf,
    /// Extraction window (odd).
    #[arg(long, value_name = "N", default_value_t = 15)]
    window: usize,
    /// Treat PATH as a dataset root and compare sharp vs blurred pairs.
    #[arg(long)]
    pairs: bool,
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes (e.g. `ecpnet stats … | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return ExitCode::from(if help { 0 } else { 1 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Contract(_) | Error::Config(_) => 1,
        Error::Data(_) | Error::Checkpoint(_) | Error::Io(_) => 2,
        Error::NonFinite(_) => 3,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Stats(args) => cmd_stats(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<u8> {
    let mut cfg = args.overrides.resolve()?;
    for (key, value) in [
        ("synth_count", &args.count),
        ("synth_size", &args.size),
        ("synth_max_support", &args.max_support),
        ("synth_delta", &args.delta),
    ] {
        if let Some(v) = value {
            cfg.apply(key, v, &format!("flag --{}", &key["synth_".len()..].replace('_', "-")))?;
        }
    }
    let spec = SynthSpec {
        count: cfg.synth_count,
        size: cfg.synth_size,
        max_support: cfg.synth_max_support,
        noise_sigma: cfg.noise_sigma,
        seed: cfg.seed,
        delta: cfg.synth_delta,
    };
    let manifest = ecpnet::data::synth_dataset(&args.out, &spec)?;
    println!(
        "wrote {} pairs to {} (size {}, max support {}, noise sigma {}, seed {})",
        manifest.count,
        args.out.display(),
        manifest.size,
        manifest.max_support,
        manifest.noise_sigma,
        manifest.seed
    );
    Ok(0)
}

fn sum_present(terms: &[Option<f64>]) -> Option<f64> {
    terms.iter().flatten().copied().reduce(|a, b| a + b)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn print_record(r: &LogRecord) {
    let recon: f64 = r.recon.iter().sum();
    println!(
        "iter {:>7}  total {:.6e}  recon {:.6e}  dark {}  bright {}  psnr {}",
        r.iter,
        r.total,
        recon,
        sum_present(&r.dark).map_or_else(|| "-".to_string(), |x| format!("{x:.6e}")),
        sum_present(&r.bright).map_or_else(|| "-".to_string(), |x| format!("{x:.6e}")),
        fmt_opt(r.eval_psnr),
    );
}

fn cmd_train(args: TrainArgs) -> Result<u8> {
    let mut cfg = match &args.resume {
        Some(path) => {
            if args.overrides.config.is_some() {
                return Err(Error::config(
                    "--resume takes its base configuration from the checkpoint; drop --config"
                        .to_string(),
                ));
            }
            let mut cfg = peek_config(path)?;
            args.overrides.apply_flags(&mut cfg)?;
            cfg
        }
        None => args.overrides.resolve()?,
    };
    if let Some(v) = &args.early_stop_psnr {
        cfg.apply("early_stop_psnr", v, "flag --early-stop-psnr")?;
    }
    cfg.validate()?;

    let dataset = Dataset::<f32>::from_dir(&args.data)?;
    println!("resolved config:");
    println!("{}", String::from_utf8_lossy(&cfg.echo_json()));
    let mut printer = |r: &LogRecord| print_record(r);
    let report = train(&cfg, &dataset, &args.out, args.resume.as_deref(), Some(&mut printer))?;
    println!(
        "finished after {} iterations{}  final psnr {}  checkpoint {}",
        report.iters_run,
        if report.early_stopped { " (early stop)" } else { "" },
        fmt_opt(report.final_eval_psnr),
        report.checkpoint_path.display()
    );
    Ok(0)
}

fn cmd_infer(args: InferArgs) -> Result<u8> {
    let loaded = load_checkpoint::<f32>(&args.model)?;
    let img: Tensor<f32> = load_image(&args.input)?;
    let m = loaded.config.network_config().spatial_multiple();
    let s = img.shape();
    let (th, tw) = (s.h / m * m, s.w / m * m);
    if th == 0 || tw == 0 {
        return Err(Error::data(format!(
            "image {} is smaller than the scale multiple {m}",
            s
        )));
    }
    let img = if (th, tw) != (s.h, s.w) {
        eprintln!(
            "warning: cropping {}x{} to {th}x{tw} (dimensions must be multiples of {m})",
            s.h, s.w
        );
        center_crop(&img, th, tw)?
    } else {
        img
    };
    let pass = loaded.network.forward(&img, false, false)?;
    save_image(&args.output, pass.restored_finest())?;
    println!("wrote {}", args.output.display());
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<u8> {
    let reports = gradcheck::run_cases(args.case.as_deref(), args.seed)?;
    let mut failures = 0;
    for r in &reports {
        println!(
            "{:<18} max rel err {:.3e}  (tol {:.0e}, {} coords, {} resamples)  {}",
            r.name,
            r.max_rel_err,
            r.threshold,
            r.coords,
            r.resamples,
            if r.passed() { "pass" } else { "FAIL" }
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} of {} cases failed", reports.len());
        return Ok(3);
    }
    println!("all {} cases passed", reports.len());
    Ok(0)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::data(format!("no .png or .ppm images in {}", dir.display())));
    }
    Ok(files)
}

fn cmd_stats(args: StatsArgs) -> Result<u8> {
    if args.pairs {
        let ds = Dataset::<f64>::from_dir(&args.path)?;
        let mut holds = 0;
        println!("{:<6} {:>12} {:>12} {:>12} {:>12}", "pair", "sharp dark", "blur dark", "sharp bright", "blur bright");
        for (i, (blur, sharp)) in ds.pairs.iter().enumerate() {
            let (sd, sb) = channel_means(sharp, args.window)?;
            let (bd, bb) = channel_means(blur, args.window)?;
            if bd >= sd && bb <= sb {
                holds += 1;
            }
            println!("{i:<6} {sd:>12.6} {bd:>12.6} {sb:>12.6} {bb:>12.6}");
        }
        println!(
            "prior statistic (blur raises dark, lowers bright) holds in {holds}/{} pairs",
            ds.pairs.len()
        );
        return Ok(0);
    }

    let files = if args.path.is_dir() {
        image_files(&args.path)?
    } else {
        vec![args.path.clone()]
    };
    let mut agg_dark = 0.0;
    let mut agg_bright = 0.0;
    println!("{:<32} {:>12} {:>12}", "image", "dark mean", "bright mean");
    for f in &files {
        let img: Tensor<f64> = load_image(f)?;
        let (d, b) = channel_means(&img, args.window)?;
        agg_dark += d;
        agg_bright += b;
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("?");
        println!("{name:<32} {d:>12.6} {b:>12.6}");
    }
    let n = files.len() as f64;
    println!(
        "{:<32} {:>12.6} {:>12.6}",
        format!("aggregate over {}", files.len()),
        agg_dark / n,
        agg_bright / n
    );
    Ok(0)
}
