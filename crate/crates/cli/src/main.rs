use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use qke_core::fingeom::{build_parity_check, CodeSpec, Family};
use qke_core::sim::{emit_tables, run_sweep, write_sweep_csv, write_table_csv, Mode, SweepConfig, TableSet};
use qke_core::{load_bundle, save_bundle, EaCssCode};

#[derive(Parser)]
#[command(
    name = "qke",
    version,
    about = "Finite-geometry codes for entanglement-assisted quantum key expansion"
)]
struct Cli {
    /// Flat `key = value` file supplying any option below; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct a self-paired code and write its bundle.
    Build {
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        p: Option<u32>,
        #[arg(long)]
        s: Option<u32>,
        #[arg(long)]
        csp: Option<usize>,
        #[arg(long)]
        rsp: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the algebraic identities of a code bundle.
    Verify {
        #[arg(long)]
        code: Option<PathBuf>,
    },
    /// Print a code parameter table as CSV.
    Tables {
        #[arg(long)]
        set: Option<String>,
        #[arg(long)]
        max_n: Option<usize>,
    },
    /// Monte Carlo sweep over channel error rates.
    Sweep {
        #[arg(long)]
        code: Option<PathBuf>,
        #[arg(long)]
        pe_start: Option<f64>,
        #[arg(long)]
        pe_end: Option<f64>,
        #[arg(long)]
        pe_step: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        max_iter: Option<usize>,
        /// Output CSV; `-` or absent writes to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Options read from `--config`, keyed like the long flags (`pe-start` or `pe_start`).
struct Settings(HashMap<String, String>);

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = HashMap::new();
        let Some(path) = path else {
            return Ok(Self(map));
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), i + 1))?;
            map.insert(key.trim().replace('_', "-"), value.trim().to_string());
        }
        Ok(Self(map))
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            Some(v) => v.parse().map(Some).map_err(|e| anyhow!("config value for {key}: {e}")),
            None => Ok(None),
        }
    }

    fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.pick(flag, key)?.ok_or_else(|| anyhow!("missing --{key}"))
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Build {
            family,
            p,
            s,
            csp,
            rsp,
            out,
        } => {
            let family: Family = cfg.require::<String>(family, "family")?.parse()?;
            let spec = CodeSpec::new(family, cfg.require(p, "p")?, cfg.require(s, "s")?)
                .split(cfg.pick(csp, "csp")?.unwrap_or(1), cfg.pick(rsp, "rsp")?.unwrap_or(1));
            let out: PathBuf = cfg.require(out, "out")?;
            let code = EaCssCode::self_paired(build_parity_check(&spec)?)?;
            save_bundle(&code, &out)?;
            let params = code.params();
            println!(
                "{spec} [[{},{};{}]] r_net {:.4} -> {}",
                params.n,
                params.m,
                params.c,
                params.r_net,
                out.display()
            );
        }
        Command::Verify { code } => {
            let dir: PathBuf = cfg.require(code, "code")?;
            let report = load_bundle(&dir)?.verify();
            print!("{report}");
            if !report.all_passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Tables { set, max_n } => {
            let set: TableSet = cfg
                .require::<String>(set, "set")?
                .parse()
                .map_err(|e: String| anyhow!(e))?;
            let rows = emit_tables(set, cfg.pick(max_n, "max-n")?.unwrap_or(11000))?;
            write_table_csv(&rows, io::stdout().lock())?;
        }
        Command::Sweep {
            code,
            pe_start,
            pe_end,
            pe_step,
            trials,
            seed,
            epsilon,
            mode,
            max_iter,
            out,
        } => {
            let dir: PathBuf = cfg.require(code, "code")?;
            let defaults = SweepConfig::default();
            let start = cfg.require(pe_start, "pe-start")?;
            let config = SweepConfig {
                pe_start: start,
                pe_end: cfg.pick(pe_end, "pe-end")?.unwrap_or(start),
                pe_step: cfg.pick(pe_step, "pe-step")?.unwrap_or(defaults.pe_step),
                trials: cfg.pick(trials, "trials")?.unwrap_or(10_000),
                seed: cfg.pick(seed, "seed")?.unwrap_or(defaults.seed),
                epsilon: cfg.pick(epsilon, "epsilon")?.unwrap_or(defaults.epsilon),
                mode: match cfg.pick::<String>(mode, "mode")? {
                    Some(m) => m.parse::<Mode>().map_err(|e| anyhow!(e))?,
                    None => defaults.mode,
                },
                max_iter: cfg.pick(max_iter, "max-iter")?.unwrap_or(defaults.max_iter),
                prior: defaults.prior,
            };
            if config.trials == 0 {
                bail!("--trials must be at least 1");
            }
            if let Some(bad) = config.points().into_iter().find(|p| !(0.0..0.5).contains(p)) {
                bail!("crossover probability {bad} outside [0, 0.5)");
            }
            let code = load_bundle(&dir)?;
            let points = run_sweep(&code, &config)?;
            match cfg.pick::<PathBuf>(out, "out")? {
                Some(path) if path.as_os_str() != "-" => {
                    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    let mut w = BufWriter::new(file);
                    write_sweep_csv(&points, &mut w)?;
                    w.flush()?;
                }
                _ => write_sweep_csv(&points, io::stdout().lock())?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
