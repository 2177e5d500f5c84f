use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use moonlet::canon::{build_mask, canonicalize, CanonOptions};
use moonlet::chem::{load_hf_solution, Molecule};
use moonlet::config::RunConfig;
use moonlet::model::Model;
use moonlet::system::System;
use moonlet::vmc::{load_checkpoint, save_checkpoint, PretrainTarget, StepRecord, Trainer};

#[derive(Parser)]
#[command(name = "moonlet", version, about = "Neural wave functions for small molecules trained with variational Monte Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the localized orbitals of a molecule as CSV.
    Localize {
        molecule: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Canonicalize the orbitals of a Hartree-Fock file.
    Canonicalize {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the network orbitals to canonicalized Hartree-Fock orbitals.
    /// Each `--molecule` must be a Hartree-Fock file.
    Pretrain(RunArgs),
    /// Minimize the energy with natural-gradient VMC.
    Train(RunArgs),
    /// Estimate energies with fixed parameters.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Sampling sweeps to average over.
        #[arg(long, default_value_t = 100)]
        iterations: usize,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run file with `c_self` and `[moon]`, `[globe]`, `[train]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Geometry or Hartree-Fock JSON; repeat for joint runs.
    #[arg(long = "molecule", required = true)]
    molecules: Vec<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    walkers: Option<usize>,
    #[arg(long)]
    determinants: Option<usize>,
}

/// Errors that should exit with the usage status.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn load_config(common: &Common) -> Result<RunConfig> {
    let Some(path) = &common.config else { return Ok(RunConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunConfig::from_toml(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = load_config(&args.common)?;
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.train.steps = s;
        cfg.train.pretrain_steps = s;
    }
    if let Some(w) = args.walkers {
        cfg.train.walkers = w;
    }
    if let Some(k) = args.determinants {
        cfg.moon.determinants = k;
    }
    Ok(cfg)
}

fn systems(paths: &[PathBuf], c_self: f64) -> Result<Vec<System>> {
    paths
        .iter()
        .map(|p| {
            let m = Molecule::load(p).with_context(|| format!("loading {}", p.display()))?;
            System::new(m, c_self).with_context(|| format!("localizing {}", p.display()))
        })
        .collect()
}

/// A fresh model, or the checkpointed one with its step counter.
fn model(args: &RunArgs, cfg: &RunConfig) -> Result<(Model, usize)> {
    match &args.checkpoint {
        Some(path) => {
            let (model, meta) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            if args.determinants.is_some_and(|k| k != meta.moon.determinants) {
                bail!("--determinants conflicts with the checkpoint ({})", meta.moon.determinants);
            }
            Ok((model, meta.step))
        }
        None => Ok((Model::new(cfg.moon.clone(), cfg.globe.clone(), cfg.train.seed), 0)),
    }
}

fn out_dir(common: &Common, default: &str) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn csv_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn localize(path: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let sys = systems(&[path.to_path_buf()], cfg.c_self)?.remove(0);
    let csv = sys.orbitals.to_csv();
    match &common.out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn canonicalize_file(input: &Path, output: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let hf = load_hf_solution(input).with_context(|| format!("loading {}", input.display()))?;
    let sys = System::new(hf.molecule.clone(), cfg.c_self)?;
    let mask = build_mask(&sys.orbitals, &hf.ao_counts)?;
    let canon = canonicalize(&hf, &mask, &CanonOptions::default())?;
    let file = hf.to_file(&canon.coefficients, Some(canon.summary_json()));
    std::fs::write(output, serde_json::to_string_pretty(&file)?).with_context(|| format!("writing {}", output.display()))?;
    info!("locality loss {:.3e} -> {:.3e}", canon.loss_trace[0], canon.loss_trace.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn pretrain(args: &RunArgs) -> Result<()> {
    let cfg = run_config(args)?;
    let (model, step) = model(args, &cfg)?;
    let mut targets = Vec::new();
    let mut syss = Vec::new();
    for p in &args.molecules {
        let hf = load_hf_solution(p).with_context(|| format!("loading Hartree-Fock file {}", p.display()))?;
        let sys = System::new(hf.molecule.clone(), cfg.c_self)?;
        targets.push(PretrainTarget::new(hf, &sys)?);
        syss.push(sys);
    }
    let dir = out_dir(&args.common, "pretrain")?;
    let mut trace = csv_writer(&dir.join("pretrain.csv"))?;
    writeln!(trace, "step,loss")?;
    let steps = cfg.train.pretrain_steps;
    let mut trainer = Trainer::new(model, syss, cfg.train);
    trainer.step = step;
    for t in 0..steps {
        let loss = trainer.pretrain_step(&targets);
        writeln!(trace, "{t},{loss}")?;
        if t % 100 == 0 {
            info!("pretrain step {t}: loss {loss:.6}");
        }
    }
    trace.flush()?;
    save_checkpoint(&trainer.model, trainer.step, trainer.config.seed, &dir.join("final"))?;
    Ok(())
}

fn train(args: &RunArgs) -> Result<()> {
    let cfg = run_config(args)?;
    let (model, step) = model(args, &cfg)?;
    let syss = systems(&args.molecules, cfg.c_self)?;
    let dir = out_dir(&args.common, "run")?;
    let mut trace = csv_writer(&dir.join("trace.csv"))?;
    writeln!(trace, "{}", StepRecord::CSV_HEADER)?;
    let steps = cfg.train.steps;
    let mut trainer = Trainer::new(model, syss, cfg.train);
    trainer.step = step;
    let ckpt = dir.join("checkpoints");
    let records = trainer.train(steps, Some(&mut trace), Some(&ckpt))?;
    trace.flush()?;
    save_checkpoint(&trainer.model, trainer.step, trainer.config.seed, &dir.join("final"))?;
    if let Some(last) = records.len().checked_sub(trainer.systems.len()) {
        for r in &records[last..] {
            info!("{}: E = {:.6} (std {:.4})", r.molecule, r.energy, r.std);
        }
    }
    Ok(())
}

fn evaluate(args: &RunArgs, iterations: usize) -> Result<()> {
    let cfg = run_config(args)?;
    let (model, _) = model(args, &cfg)?;
    let syss = systems(&args.molecules, cfg.c_self)?;
    let mut trainer = Trainer::new(model, syss, cfg.train);
    let mut out: Box<dyn Write> = match &args.common.out {
        Some(p) => Box::new(csv_writer(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    for e in trainer.evaluate(iterations) {
        writeln!(out, "{} {:.6} +- {:.6} (std {:.4}, {} samples)", e.molecule, e.mean, e.stderr, e.std, e.samples)?;
    }
    out.flush()?;
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MOONLET_THREADS") {
        let n: usize = v.parse().map_err(|_| UsageError(format!("MOONLET_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("building the thread pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| match &cli.command {
        Command::Localize { molecule, common } => localize(molecule, common),
        Command::Canonicalize { input, output, common } => canonicalize_file(input, output, common),
        Command::Pretrain(args) => pretrain(args),
        Command::Train(args) => train(args),
        Command::Evaluate { run, iterations } => evaluate(run, *iterations),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
