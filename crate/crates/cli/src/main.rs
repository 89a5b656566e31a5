use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cellfree_loc::harness::{build_setup, run_experiment, summarize, write_summary, ExperimentSpec, Sweep, SweepAxis};
use cellfree_loc::metrics::read_trials;

#[derive(Parser)]
#[command(name = "cellfree-loc", version, about = "Monte Carlo runner for distributed GPR localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write trial CSVs, summary.csv and report.json.
    Run {
        /// TOML file with flat scenario and experiment keys. Desk-scale
        /// defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// One of N, K, L, shadow_sigma_db, zscore_threshold.
        #[arg(long, requires = "sweep_values")]
        sweep_axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',', requires = "sweep_axis")]
        sweep_values: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate a trial CSV into per-method summary rows.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the value in a parent directory named `<axis>=<value>`.
        #[arg(long)]
        sweep_value: Option<f64>,
    },
    /// Write one setup's layout and offline fingerprint databases.
    DumpScenario {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        setup: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_spec(config: Option<&Path>) -> Result<ExperimentSpec> {
    Ok(match config {
        Some(p) => ExperimentSpec::from_toml_file(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentSpec::default(),
    })
}

/// `.../shadow_sigma_db=8/trials.csv` → 8.
fn sweep_value_from_path(path: &Path) -> Option<f64> {
    let dir = path.parent()?.file_name()?.to_str()?;
    let (axis, value) = dir.split_once('=')?;
    axis.parse::<SweepAxis>().ok()?;
    value.parse().ok()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, sweep_axis, sweep_values, out, threads, seed } => {
            let mut spec = load_spec(config.as_deref())?;
            if let (Some(axis), Some(values)) = (sweep_axis, sweep_values) {
                spec.sweep = Some(Sweep { axis, values });
            }
            if let Some(o) = out {
                spec.output_dir = o;
            }
            if let Some(t) = threads {
                spec.threads = t;
            }
            if let Some(s) = seed {
                spec.base.seed = s;
            }
            spec.validate()?;
            let outcome = run_experiment(&spec)?;
            outcome.write(&spec.output_dir)?;
            let rows: usize = outcome.sweeps.iter().map(|s| s.trials.len()).sum();
            println!("wrote {rows} trial rows to {}", spec.output_dir.display());
            let failures = outcome.failure_count();
            if failures > 0 {
                eprintln!("{failures} failures; see report.json");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Summarize { input, out, sweep_value } => {
            let file = fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let trials = read_trials(file).with_context(|| format!("parsing {}", input.display()))?;
            if trials.is_empty() {
                bail!("{} has no trial rows", input.display());
            }
            let rows = summarize(&trials, sweep_value.or_else(|| sweep_value_from_path(&input)), None);
            write_summary(fs::File::create(&out)?, &rows)?;
            println!("wrote {} summary rows to {}", rows.len(), out.display());
        }
        Command::DumpScenario { config, setup, out } => {
            let spec = load_spec(config.as_deref())?;
            let data = build_setup(&spec.base, setup, spec.num_test_points)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("scenario.json"), data.scenario.to_json()?)?;
            for db in &data.dbs {
                db.write_csv(fs::File::create(out.join(format!("fingerprints_ap{}.csv", db.ap_index)))?)?;
            }
            println!("wrote scenario and {} fingerprint databases to {}", data.dbs.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_value_inference() {
        assert_eq!(sweep_value_from_path(Path::new("out/N=16/trials.csv")), Some(16.0));
        assert_eq!(sweep_value_from_path(Path::new("out/trials.csv")), None);
        assert_eq!(sweep_value_from_path(Path::new("out/foo=3/trials.csv")), None);
    }
}
