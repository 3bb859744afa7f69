use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use stimopt::config::RunConfig;
use stimopt::data::{self, Resolution, Split};
use stimopt::eval::{emit_report, read_pgm, write_pgm, MetricsReport};
use stimopt::phosphene::{normalized_cross_correlation, FrameSet, Percept, Stimulus, PERCEPT_SIDE};
use stimopt::tensor::gradcheck::primitive_suite;
use stimopt::train::{self, EpochLog, Run, Stage, TrainOutcome};
use stimopt::{Error, Result};

#[derive(Parser)]
#[command(name = "stimopt", version, about = "End-to-end stimulus optimization for a simulated retinal implant")]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["28x28", "6x10"])]
    resolution: Option<String>,
    #[arg(long, global = true, value_parser = ["mse", "ce"])]
    loss: Option<String>,
    /// Data directory (also settable with PERCEPT_DATA_DIR).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Epoch budget of the stage being run.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch, verify and split MNIST, then render and cache percept datasets.
    Data {
        #[command(subcommand)]
        action: DataAction,
    },
    /// Render a stimulus file (PGM or whitespace-separated amplitudes) to a 28×28 percept PGM.
    Render {
        stimulus: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train the implant surrogate at `--resolution`.
    PretrainSurrogate,
    /// Train the digit classifier on original images.
    PretrainClassifier,
    /// Train an encoder at `--resolution` with `--loss` through the frozen networks.
    TrainEncoder,
    /// Score baselines and trained encoders on the test split.
    Eval,
    /// Write CSV, Markdown and PGM files from a saved evaluation.
    Report {
        /// Output directory (default: the run's eval directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every stage in order: both surrogates, the classifier, four encoders, eval.
    Pipeline,
    /// Check the renderer against golden percepts and every autodiff primitive against finite differences.
    Verify {
        #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/golden"))]
        golden: PathBuf,
    },
}

#[derive(Subcommand)]
enum DataAction {
    Prepare,
}

impl Cli {
    fn run_config(&self, stage_epochs: &[&str]) -> Result<RunConfig> {
        let mut flags: Vec<(&str, String)> = Vec::new();
        if let Some(s) = self.seed {
            flags.push(("run.seed", s.to_string()));
        }
        if let Some(r) = &self.resolution {
            flags.push(("run.resolution", r.clone()));
        }
        if let Some(l) = &self.loss {
            flags.push(("run.loss", l.clone()));
        }
        if let Some(d) = &self.data_dir {
            flags.push(("data.dir", d.display().to_string()));
        }
        if let Some(d) = &self.run_dir {
            flags.push(("run.dir", d.display().to_string()));
        }
        if let Some(t) = self.threads {
            flags.push(("run.threads", t.to_string()));
        }
        if let Some(e) = self.epochs {
            for key in stage_epochs {
                flags.push((key, e.to_string()));
            }
        }
        RunConfig::resolve(self.config.as_deref(), |k| std::env::var(k).ok(), &flags)
    }
}

fn data_prepare(cfg: &RunConfig) -> Result<()> {
    let report = data::fetch(cfg)?;
    println!(
        "mnist: {} downloaded, {} already verified in {}",
        report.downloaded.len(),
        report.present.len(),
        data::mnist_dir(cfg).display()
    );
    let splits = data::load_splits(cfg)?;
    println!("split: {} train, {} val, {} test", splits.train.len(), splits.val.len(), splits.test.len());
    let trajectory = data::trajectory(cfg)?;
    for resolution in [Resolution::Argus6x10, Resolution::Full28] {
        let renderer = data::renderer(cfg, resolution, &trajectory)?;
        for split in [Split::Train, Split::Val, Split::Test] {
            let t = Instant::now();
            let out = data::percepts(cfg, &splits, split, resolution, &renderer)?;
            println!(
                "percepts {resolution} {}: {} images, {} rendered in {:.1}s -> {}",
                split.as_str(),
                out.dataset.len(),
                out.rendered,
                t.elapsed().as_secs_f64(),
                out.path.display()
            );
        }
    }
    Ok(())
}

/// Amplitudes from a binary PGM (scaled by 1/255) or a text file of numbers.
fn read_stimulus(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P5") {
        let (_, _, px) = read_pgm(&bytes)?;
        return Ok(px.iter().map(|&p| p as f32 / 255.0).collect());
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Input(format!("{} is neither PGM nor text", path.display())))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f32>().map_err(|_| Error::Input(format!("bad amplitude `{s}` in {}", path.display()))))
        .collect()
}

fn render(cfg: &RunConfig, stimulus: &Path, out: &Path) -> Result<()> {
    let amps = read_stimulus(stimulus)?;
    let resolution = match amps.len() {
        60 => Resolution::Argus6x10,
        784 => Resolution::Full28,
        n => return Err(Error::Input(format!("{n} amplitudes; expected 60 (6×10) or 784 (28×28)"))),
    };
    let traj = data::trajectory(cfg)?;
    let renderer = data::renderer(cfg, resolution, &traj)?;
    let stim = Stimulus::new(*renderer.grid(), amps)?;
    let native = renderer.render(&stim)?;
    let small = stimopt::phosphene::resize_bilinear(&native, PERCEPT_SIDE, PERCEPT_SIDE)?;
    let peak = small.max();
    let shown: Vec<f32> = small.data().iter().map(|v| if peak > 0.0 { v / peak } else { 0.0 }).collect();
    write_pgm(out, PERCEPT_SIDE, PERCEPT_SIDE, &shown)?;
    println!("{resolution} stimulus -> {} (peak brightness {peak:.4})", out.display());
    Ok(())
}

fn print_epoch(l: &EpochLog) {
    println!(
        "epoch {:>3}  train loss {:.6e}  validation {:.6e}  {:.1}s",
        l.epoch, l.train_loss, l.val_metric, l.seconds
    );
}

fn trained(o: TrainOutcome) -> Result<()> {
    println!(
        "best epoch {} (validation {:.6e}) -> {}",
        o.best_epoch,
        o.best_metric,
        o.checkpoint.display()
    );
    Ok(())
}

fn report(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let run = Run::open(cfg, false)?;
    let dir = run.stage_dir(Stage::Eval);
    let report = MetricsReport::load(&dir)?;
    for p in emit_report(&report, out.unwrap_or(&dir))? {
        println!("{}", p.display());
    }
    Ok(())
}

fn verify(cfg: &RunConfig, golden: &Path) -> Result<()> {
    let stims = FrameSet::read(&golden.join("stimuli_6x10.pcpt"))?;
    let refs = FrameSet::read(&golden.join("percepts_6x10.pcpt"))?;
    let traj = data::trajectory(cfg)?;
    let renderer = data::renderer(cfg, Resolution::Argus6x10, &traj)?;
    let mut failed = 0;
    for (i, (s, g)) in stims.frames.iter().zip(&refs.frames).enumerate() {
        let p: Percept = renderer.render(&Stimulus::new(*renderer.grid(), s.clone())?)?;
        let ncc = normalized_cross_correlation(p.data(), g)?;
        let ok = ncc >= 0.95;
        failed += usize::from(!ok);
        println!("golden {i}: ncc {ncc:.4} {}", if ok { "ok" } else { "FAIL" });
    }
    for c in primitive_suite(0..20)? {
        if c.rel_error >= 1e-3 {
            failed += 1;
            println!("gradient {} seed {}: rel err {:.2e} FAIL", c.name, c.seed, c.rel_error);
        }
    }
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} verification check(s) failed")));
    }
    println!("all checks passed");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Data { action: DataAction::Prepare } => data_prepare(&cli.run_config(&[])?),
        Command::Render { stimulus, out } => render(&cli.run_config(&[])?, stimulus, out),
        Command::PretrainSurrogate => {
            let cfg = cli.run_config(&["train.surrogate.epochs"])?;
            let run = Run::open(&cfg, true)?;
            trained(train::run_pretrain_surrogate(&cfg, &run, cfg.resolution, print_epoch)?)
        }
        Command::PretrainClassifier => {
            let cfg = cli.run_config(&["train.classifier.epochs"])?;
            let run = Run::open(&cfg, true)?;
            trained(train::run_pretrain_classifier(&cfg, &run, print_epoch)?)
        }
        Command::TrainEncoder => {
            let cfg = cli.run_config(&["train.encoder.epochs"])?;
            let run = Run::open(&cfg, false)?;
            trained(train::run_train_encoder(&cfg, &run, cfg.resolution, cfg.loss, print_epoch)?)
        }
        Command::Eval => {
            let cfg = cli.run_config(&[])?;
            let run = Run::open(&cfg, false)?;
            let r = train::run_eval(&cfg, &run, |s| println!("{s}"))?;
            print_f1(&r);
            Ok(())
        }
        Command::Report { out } => report(&cli.run_config(&[])?, out.as_deref()),
        Command::Pipeline => {
            let cfg = cli.run_config(&["train.surrogate.epochs", "train.classifier.epochs", "train.encoder.epochs"])?;
            let run = Run::open(&cfg, true)?;
            println!("run directory {}", run.dir.display());
            let r = train::run_all(&cfg, &run, |s| println!("{s}"), print_epoch)?;
            print_f1(&r);
            Ok(())
        }
        Command::Verify { golden } => verify(&cli.run_config(&[])?, golden),
    }
}

fn print_f1(r: &MetricsReport) {
    for row in &r.f1 {
        println!(
            "{:<6} {:<12} micro F1 {:.4}  weighted F1 {:.4}",
            row.resolution, row.method, row.micro_f1, row.weighted_f1
        );
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
    if let Some(n) = cli.threads.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
