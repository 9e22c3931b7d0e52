//! `onebit`: runs the one-bit detection experiments from a JSON config.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use onebit_core::detect::ZF_VARIANT;
use onebit_core::experiment::{
    run_adaptive, run_offline_snr_training, run_ser_sweep, run_zero_count_sweep,
};
use onebit_core::{Error, SimConfig};

#[derive(Parser)]
#[command(
    name = "onebit",
    version,
    about = "Learning-based ML detection with one-bit ADCs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// SER of each configured detector over the SNR grid
    SerSweep(Common),
    /// mean zero-probability counts of plain and dithered pilot learning
    ZeroCount(Common),
    /// offline dataset and polynomial SNR model (model JSON to --out)
    SnrTrain(Common),
    /// CRC-driven post-update sessions, one trace per adaptive detector
    Adaptive(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted fields take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// master seed, overrides the config
    #[arg(long)]
    seed: Option<u64>,
    /// output path, overrides the config; stdout when neither is set
    #[arg(long)]
    out: Option<PathBuf>,
    /// worker threads
    #[arg(long, env = "ONEBIT_THREADS")]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> onebit_core::Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                SimConfig::from_json(&text)?
            }
            None => SimConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_path = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sink(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Run metadata that does not belong in the fixed-format CSV.
fn write_meta(cfg: &SimConfig, extra: serde_json::Value) -> anyhow::Result<()> {
    if let Some(out) = &cfg.output_path {
        let meta = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed,
            "zf_variant": ZF_VARIANT,
            "config": cfg,
            "extra": extra,
        });
        std::fs::write(
            with_suffix(out, ".meta.json"),
            serde_json::to_string_pretty(&meta)? + "\n",
        )?;
    }
    Ok(())
}

fn run(command: &Command, cfg: &SimConfig) -> anyhow::Result<()> {
    let out = cfg.output_path.as_deref();
    match command {
        Command::SerSweep(_) => {
            let res = run_ser_sweep(cfg)?;
            let mut w = sink(out)?;
            res.write_csv(&mut w, cfg.record_wall_time)?;
            w.flush()?;
            write_meta(cfg, serde_json::json!({ "snr_model": res.snr_model }))?;
        }
        Command::ZeroCount(_) => {
            let res = run_zero_count_sweep(cfg)?;
            let mut w = sink(out)?;
            res.write_csv(&mut w, cfg.record_wall_time)?;
            w.flush()?;
            write_meta(cfg, serde_json::Value::Null)?;
        }
        Command::SnrTrain(_) => {
            let (ds, model) = run_offline_snr_training(cfg)?;
            match out {
                Some(p) => {
                    model.save_json(p)?;
                    ds.write_csv(BufWriter::new(File::create(with_suffix(
                        p,
                        ".dataset.csv",
                    ))?))?;
                }
                None => println!("{}", serde_json::to_string_pretty(&model)?),
            }
        }
        Command::Adaptive(_) => {
            let traces = run_adaptive(cfg)?;
            for tr in &traces {
                match out {
                    Some(p) => {
                        let path = with_suffix(p, &format!(".{}.csv", tr.detector));
                        let mut w = sink(Some(&path))?;
                        tr.write_csv(&mut w)?;
                        w.flush()?;
                    }
                    None => {
                        let mut w = io::stdout().lock();
                        writeln!(w, "# {}", tr.detector)?;
                        tr.write_csv(&mut w)?;
                    }
                }
            }
            write_meta(cfg, serde_json::Value::Null)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::SerSweep(c)
        | Command::ZeroCount(c)
        | Command::SnrTrain(c)
        | Command::Adaptive(c) => c,
    };
    let cfg = match common.load() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = common.threads {
        if n == 0 {
            eprintln!("config error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let config = e.downcast_ref::<Error>().is_some_and(Error::is_config);
            eprintln!("{}: {e:#}", if config { "config error" } else { "error" });
            if config {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
