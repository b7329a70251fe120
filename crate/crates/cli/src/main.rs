use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mdlc_cli::config::{parse_override, RunConfig};
use mdlc_cli::verify::{self, DEFAULT_NORMS, KL_ORACLE_SAMPLES};
use mdlc_cli::{run_matrix_with, summarize_phase};
use mdlc_core::ftrl::FtrlConfig;
use mdlc_core::shrinkage::{PriorKind, MIN_SWEEP_SAMPLES};
use mdlc_core::Result;
use serde_json::{Map, Value};

#[derive(Parser)]
#[command(name = "mdlc", about = "Default-policy regularised RL experiments and checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every method x seed cell and write CSVs, checkpoints and a manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        experiment: Option<String>,
        /// Comma-separated method names.
        #[arg(long)]
        methods: Option<String>,
        /// `a..b` (inclusive) or a comma list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Any config key, as key=value. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase cumulative-regret table from a training directory.
    Summarize {
        dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        phase: u8,
        /// Also write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Monte Carlo risk of ML, James-Stein and the Bayes estimator.
    ShrinkageVerify {
        #[arg(long, default_value = "jeffreys")]
        prior: String,
        #[arg(long, default_value_t = 6)]
        d: usize,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value_t = MIN_SWEEP_SAMPLES)]
        n: usize,
        #[arg(long, default_value = "0,1,2,5,10")]
        norms: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// FTRL regret versus number of tasks K.
    FtrlSim {
        #[arg(long, default_value = "4,16,64")]
        k: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form KL approximation against Monte Carlo.
    KlOracle {
        #[arg(long, default_value = "-4:4:0.5", allow_hyphen_values = true)]
        grid: String,
        #[arg(long, default_value_t = KL_ORACLE_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train {
            config,
            experiment,
            methods,
            seeds,
            scale,
            parallelism,
            set,
            out,
        } => {
            let base = match &config {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
                    .map_err(|e| mdlc_core::Error::config(format!("{}: {e}", p.display())))?,
                None => Value::Null,
            };
            let mut over = Map::new();
            for s in &set {
                let (k, v) = parse_override(s)?;
                over.insert(k, v);
            }
            if let Some(e) = experiment {
                over.insert("experiment".into(), e.into());
            }
            if let Some(m) = methods {
                over.insert("methods".into(), m.into());
            }
            if let Some(s) = seeds {
                over.insert("seeds".into(), s.into());
            }
            if let Some(s) = scale {
                over.insert("scale".into(), s.into());
            }
            if let Some(p) = parallelism {
                over.insert("parallelism".into(), p.into());
            }
            let cfg = RunConfig::merged(&base, &over)?;
            let m = run_matrix_with(&cfg, &out, |method, seed, ok| {
                eprintln!("{method} seed {seed}: {}", if ok { "ok" } else { "FAILED" });
            })?;
            let failed: Vec<_> = m.cells.iter().filter(|c| c.error.is_some()).collect();
            for c in &failed {
                eprintln!("{} seed {} failed: {}", c.method, c.seed, c.error.as_deref().unwrap_or(""));
            }
            Ok(failed.is_empty())
        }
        Command::Summarize { dir, phase, csv } => {
            let t = summarize_phase(&dir, phase)?;
            print!("{}", t.render());
            if let Some(p) = csv {
                fs::write(p, t.to_csv())?;
            }
            Ok(true)
        }
        Command::ShrinkageVerify {
            prior,
            d,
            s,
            t,
            n,
            norms,
            seed,
            out,
        } => {
            let prior = PriorKind::parse(&prior, s, t)?;
            let norms = if norms.is_empty() {
                DEFAULT_NORMS.to_vec()
            } else {
                verify::parse_list(&norms, "norms")?
            };
            let table = verify::shrinkage_verify(prior, d, &norms, n, seed)?;
            emit(&verify::shrinkage_csv(&table), &out)?;
            Ok(true)
        }
        Command::FtrlSim { k, seeds, out } => {
            let ks: Vec<usize> = verify::parse_list(&k, "k")?;
            let curve = verify::ftrl_sim(&FtrlConfig::default(), &ks, seeds)?;
            emit(&verify::ftrl_csv(&curve), &out)?;
            Ok(true)
        }
        Command::KlOracle {
            grid,
            samples,
            seed,
            out,
        } => {
            let rows = verify::kl_oracle(&verify::parse_grid(&grid)?, samples, seed)?;
            emit(&verify::kl_csv(&rows), &out)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
