use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ncchern::error::Error;
use ncchern::harness::{self, ExperimentSpec};

/// Noncommutative topological invariants for disordered magnetic lattice
/// models: Chern numbers from cyclic traces, integer and mod-2 index
/// pairings, edge spectral flow, and localization diagnostics.
#[derive(Parser)]
#[command(name = "ncchern", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the ledger and CSV summary.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of disorder samples (overrides the config).
    #[arg(long)]
    samples: Option<usize>,
    /// Base random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 picks the machine default.
    #[arg(long)]
    threads: Option<usize>,
    /// Eigensolver cache directory (overrides NCCHERN_CACHE and the config).
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Spatial dimension for tasks that run without a config file.
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Even Chern number of the Fermi projection via the cyclic trace formula.
    BulkChern(CommonArgs),
    /// Odd pairing on shift unitaries; winding k must come out as exactly 2k.
    OddChern(CommonArgs),
    /// Mod-2 index of a time-reversal-doubled Fermi projection.
    Mod2Index(CommonArgs),
    /// Boundary current winding of the gap-switch unitary on a strip.
    EdgeWinding(CommonArgs),
    /// Compare the bulk invariant on an open box against the edge winding.
    BulkEdgeCheck(CommonArgs),
    /// Disorder-averaged Sobolev norms of the Fermi projection.
    SobolevReport(CommonArgs),
    /// Kernel decay fits, fractional-moment bounds, and a mobility verdict.
    LocalizationScan(CommonArgs),
    /// Lattice zeta-function residues against closed forms (no model needed).
    ResidueCheck(CommonArgs),
    /// Weighted Hilbert-Schmidt norm identity on test kernels (no model needed).
    HsCheck(CommonArgs),
    /// Algebraic identities of the Clifford representation (no model needed).
    CliffordSelftest(CommonArgs),
    /// Re-run the configured task across a list of parameter values.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Parameter to vary (mu, disorder_amplitude, theta_12,
        /// core_fraction, box_length, potential_amplitude).
        #[arg(long)]
        param: String,
        /// Comma-separated parameter values; empty list writes an empty ledger.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
}

impl Command {
    fn task_name(&self) -> Option<&'static str> {
        match self {
            Command::BulkChern(_) => Some("bulk-chern"),
            Command::OddChern(_) => Some("odd-chern"),
            Command::Mod2Index(_) => Some("mod2-index"),
            Command::EdgeWinding(_) => Some("edge-winding"),
            Command::BulkEdgeCheck(_) => Some("bulk-edge-check"),
            Command::SobolevReport(_) => Some("sobolev-report"),
            Command::LocalizationScan(_) => Some("localization-scan"),
            Command::ResidueCheck(_) => Some("residue-check"),
            Command::HsCheck(_) => Some("hs-check"),
            Command::CliffordSelftest(_) => Some("clifford-selftest"),
            Command::Sweep { .. } => None,
        }
    }

    fn common(&self) -> &CommonArgs {
        match self {
            Command::BulkChern(c)
            | Command::OddChern(c)
            | Command::Mod2Index(c)
            | Command::EdgeWinding(c)
            | Command::BulkEdgeCheck(c)
            | Command::SobolevReport(c)
            | Command::LocalizationScan(c)
            | Command::ResidueCheck(c)
            | Command::HsCheck(c)
            | Command::CliffordSelftest(c) => c,
            Command::Sweep { common, .. } => common,
        }
    }
}

const STANDALONE_TASKS: &[&str] = &["residue-check", "hs-check", "clifford-selftest"];

fn build_spec(task: Option<&str>, common: &CommonArgs) -> Result<ExperimentSpec, Error> {
    let mut spec = match &common.config {
        Some(path) => {
            let spec = harness::load_spec(path)?;
            if let Some(task) = task {
                if spec.task != task {
                    return Err(Error::Config(format!(
                        "config file declares task `{}` but the command line asked for `{task}`",
                        spec.task
                    )));
                }
            }
            spec
        }
        None => match task {
            Some(t) if STANDALONE_TASKS.contains(&t) => {
                harness::standalone_spec(t, common.d.unwrap_or(2))
            }
            Some(t) => {
                return Err(Error::Config(format!("task `{t}` needs --config <file>")))
            }
            None => return Err(Error::Config("sweep needs --config <file>".into())),
        },
    };
    if let Some(out) = &common.out {
        spec.out_dir = Some(out.clone());
    }
    if let Some(n) = common.samples {
        spec.n_samples = n;
    }
    if let Some(s) = common.seed {
        spec.base_seed = s;
    }
    if let Some(t) = common.threads {
        spec.threads = Some(t);
    }
    if let Some(c) = &common.cache {
        spec.cache_dir = Some(c.clone());
    } else if let Ok(env_cache) = std::env::var("NCCHERN_CACHE") {
        if !env_cache.is_empty() {
            spec.cache_dir = Some(PathBuf::from(env_cache));
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn real_main(cli: Cli) -> Result<(), Error> {
    let spec = build_spec(cli.command.task_name(), cli.command.common())?;
    let report = match &cli.command {
        Command::Sweep { param, values, .. } => harness::sweep(&spec, param, values)?,
        _ => harness::run(&spec)?,
    };
    for line in &report.lines {
        println!("{line}");
    }
    println!("ledger: {}", report.ledger_path.display());
    println!("summary: {}", report.csv_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
