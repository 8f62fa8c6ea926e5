use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iovsim::baselines::Variant;
use iovsim::config::{RunConfig, SweepAxis};
use iovsim::dqn::{load_checkpoint, save_checkpoint};
use iovsim::experiment::{self, OracleSweep};
use iovsim::{Error, Result};

#[derive(Parser)]
#[command(
    name = "iovsim",
    version,
    about = "NOMA vehicular slicing: DQN scheduler, benchmarks and oracle"
)]
struct Cli {
    /// TOML run configuration; defaults are used for anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the Q-network; writes model.ckpt and training_log.csv.
    Train {
        /// Training episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Greedy evaluation of a checkpoint; writes eval.csv.
    Eval {
        /// Defaults to model.ckpt in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluation episodes per sweep point.
        #[arg(long)]
        episodes: Option<usize>,
        /// default, size, deadline or all.
        #[arg(long, default_value = "default")]
        sweep: SweepAxis,
    },
    /// Run the offline benchmarks; writes baseline.csv.
    Baseline {
        /// Comma-separated subset of OMA-MP, NOMA-MP, NOMA-RP.
        #[arg(long, value_delimiter = ',', default_value = "OMA-MP,NOMA-MP,NOMA-RP")]
        algorithms: Vec<Variant>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value = "default")]
        sweep: SweepAxis,
    },
    /// Compare every policy with exhaustive search on tiny instances;
    /// writes oracle.csv and fails if any bound is violated.
    Oracle {
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Aggregate evaluation tables into plotdata.csv.
    Plotdata {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Print the effective configuration.
    PrintConfig,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

/// Creates the output directory and checks that it accepts files.
fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-test");
    File::create(&probe)?;
    fs::remove_file(probe)?;
    Ok(())
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::PrintConfig => print!("{}", cfg.to_toml()),
        Cmd::Train { episodes } => {
            if let Some(e) = episodes {
                cfg.train.episodes = e;
            }
            cfg.validate()?;
            prepare_out(&cfg.out)?;
            let out = experiment::train_default(&cfg, |r| {
                if r.episode % 100 == 0 || r.episode + 1 == cfg.train.episodes {
                    eprintln!(
                        "episode {:>5}  return {:>8.3}  avg {:>8}  eps {:.3}",
                        r.episode,
                        r.ret,
                        r.moving_avg.map_or("-".into(), |v| format!("{v:.3}")),
                        r.epsilon
                    );
                }
            })?;
            save_checkpoint(&out.net, &cfg.out.join("model.ckpt"))?;
            write_file(&cfg.out.join("training_log.csv"), |w| {
                experiment::write_train_log(&out.log, w)
            })?;
        }
        Cmd::Eval {
            checkpoint,
            episodes,
            sweep,
        } => {
            if let Some(e) = episodes {
                cfg.eval_episodes = e;
            }
            cfg.validate()?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join("model.ckpt"));
            let net = load_checkpoint(&ckpt)?;
            prepare_out(&cfg.out)?;
            let rows = experiment::eval_dql(&net, &cfg, &cfg.sweep.points(sweep))?;
            write_file(&cfg.out.join("eval.csv"), |w| experiment::write_eval_csv(&rows, w))?;
        }
        Cmd::Baseline {
            algorithms,
            episodes,
            sweep,
        } => {
            if let Some(e) = episodes {
                cfg.eval_episodes = e;
            }
            cfg.validate()?;
            prepare_out(&cfg.out)?;
            let rows = experiment::eval_baselines(&algorithms, &cfg, &cfg.sweep.points(sweep))?;
            write_file(&cfg.out.join("baseline.csv"), |w| experiment::write_eval_csv(&rows, w))?;
        }
        Cmd::Oracle { instances } => {
            prepare_out(&cfg.out)?;
            let sweep = OracleSweep {
                instances,
                ..OracleSweep::default()
            };
            let rows = experiment::oracle_sweep(cfg.seed, &sweep)?;
            write_file(&cfg.out.join("oracle.csv"), |w| experiment::write_oracle_csv(&rows, w))?;
            let bad = rows.iter().filter(|r| r.violates()).count();
            eprintln!("{instances} instances, {} comparisons, {bad} violations", rows.len());
            if bad > 0 {
                return Err(Error::ContractViolation(format!("{bad} oracle bound violations")));
            }
        }
        Cmd::Plotdata { inputs } => {
            let mut rows = Vec::new();
            for p in &inputs {
                let r = experiment::read_eval_csv(BufReader::new(File::open(p)?))
                    .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
                rows.extend(r);
            }
            prepare_out(&cfg.out)?;
            let agg = experiment::aggregate(&rows);
            write_file(&cfg.out.join("plotdata.csv"), |w| experiment::write_plotdata(&agg, w))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
