use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sipsim::config::RunConfig;
use sipsim::dataset::generate_dataset;
use sipsim::sim::{ce_mse_records, write_csv, PointResult, Simulator};
use sipsim_core::pilot::PilotBook;
use sipsim_neural::checkpoint;

#[derive(Parser)]
#[command(name = "sipsim", version, about = "Superimposed-pilot link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the section the command uses.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted for text outputs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// BLER/throughput sweep of the configured link, as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Per-iteration receiver diagnostics as JSONL.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Writes a binary training-sample file.
    Dataset {
        #[command(flatten)]
        common: Common,
        /// Overrides `dataset.samples`.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Trains receiver networks online and saves a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training log as JSONL; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from this checkpoint's weights.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Runs every `[[eval]]` entry into one CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Mean CE-MSE per iteration as JSONL.
        #[arg(long)]
        ce_mse: Option<PathBuf>,
    },
    /// Dumps the superimposed pilot book as JSON.
    Pilotbook {
        #[command(flatten)]
        common: Common,
        /// Layer count; defaults to the largest configured.
        #[arg(long)]
        layers: Option<usize>,
    },
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(common: &Common) -> anyhow::Result<RunConfig> {
    Ok(RunConfig::load(&common.config).with_context(|| format!("loading {}", common.config.display()))?)
}

fn sweep(common: &Common, diagnostics: Option<&Path>) -> anyhow::Result<()> {
    let mut cfg = load(common)?;
    if let Some(s) = common.seed {
        cfg.sweep.seed = s;
    }
    let sim = Simulator::new(&cfg)?;
    let mut diag = diagnostics.map(|p| output(Some(p))).transpose()?;
    let points = sim.sweep(diag.as_mut().map(|w| w.as_mut() as &mut dyn Write))?;
    if let Some(mut w) = diag {
        w.flush()?;
    }
    let mut out = output(common.out.as_deref())?;
    write_csv(&points, &mut out)?;
    out.flush()?;
    Ok(())
}

fn dataset(common: &Common, samples: Option<usize>) -> anyhow::Result<()> {
    let cfg = load(common)?;
    let section = cfg.dataset.clone().context("missing [dataset] section")?;
    let out = common.out.as_deref().context("dataset needs --out")?;
    let count = samples.unwrap_or(section.samples);
    let seed = common.seed.unwrap_or(section.seed);
    let header = generate_dataset(&cfg, count, seed, (section.snr_db[0], section.snr_db[1]), out)?;
    eprintln!("wrote {} samples ({} bytes each) to {}", header.count, header.record_bytes(), out.display());
    Ok(())
}

fn train(common: &Common, log: Option<&Path>, resume: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load(common)?;
    let mut tc = cfg.train_config()?;
    if let Some(s) = common.seed {
        tc.seed = s;
    }
    let out = common.out.as_deref().context("train needs --out")?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let resume = match resume {
        Some(p) => Some(checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?.0),
        None => None,
    };
    let mut log_out = output(Some(&log_path))?;
    let (nets, meta) = sipsim::train::train(&cfg, tc, resume, |rec| {
        serde_json::to_writer(&mut log_out, rec).map_err(|e| sipsim_neural::Error::Config(e.to_string()))?;
        log_out.write_all(b"\n")?;
        log_out.flush()?;
        eprintln!("step {:>6}  loss {:.5}  bce {:.5}  mse {:.5}", rec.step, rec.loss, rec.bce, rec.mse);
        Ok(())
    })?;
    checkpoint::save(out, &nets, &meta)?;
    eprintln!("saved {}", out.display());
    Ok(())
}

fn eval(common: &Common, ce_mse: Option<&Path>) -> anyhow::Result<()> {
    let mut cfg = load(common)?;
    if let Some(s) = common.seed {
        cfg.sweep.seed = s;
    }
    let runs = if cfg.eval.is_empty() {
        vec![cfg.clone()]
    } else {
        cfg.eval.iter().map(|e| cfg.with_entry(e)).collect::<sipsim::Result<Vec<_>>>()?
    };
    let mut points: Vec<PointResult> = Vec::new();
    for run in &runs {
        eprintln!("evaluating {}", run.label());
        points.extend(Simulator::new(run)?.sweep(None)?);
    }
    let mut out = output(common.out.as_deref())?;
    write_csv(&points, &mut out)?;
    out.flush()?;
    if let Some(p) = ce_mse {
        let mut w = output(Some(p))?;
        for r in ce_mse_records(&points) {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn pilotbook(common: &Common, layers: Option<usize>) -> anyhow::Result<()> {
    let cfg = load(common)?;
    let layers = layers.unwrap_or_else(|| cfg.layer_list().into_iter().max().unwrap_or(1));
    let seed = common.seed.unwrap_or(cfg.link.pilot_seed);
    let book = PilotBook::build(&cfg.dims(layers)?, seed)?;
    let mut out = output(common.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &book.dump())?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<sipsim::Error>() {
            return e.exit_code() as u8;
        }
        match cause.downcast_ref::<sipsim_neural::Error>() {
            Some(sipsim_neural::Error::Diverged { .. }) => return 3,
            Some(sipsim_neural::Error::Core(e)) if sipsim::is_numerical(e) => return 3,
            Some(_) => return 2,
            None => {}
        }
        if let Some(e) = cause.downcast_ref::<sipsim_core::Error>() {
            return if sipsim::is_numerical(e) { 3 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sweep { common, diagnostics } => sweep(common, diagnostics.as_deref()),
        Command::Dataset { common, samples } => dataset(common, *samples),
        Command::Train { common, log, resume } => train(common, log.as_deref(), resume.as_deref()),
        Command::Eval { common, ce_mse } => eval(common, ce_mse.as_deref()),
        Command::Pilotbook { common, layers } => pilotbook(common, *layers),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
