use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hj_track::cli::{cmd_nominal, cmd_sweep, cmd_track, cmd_train, parse_explicit, CliError, TrackStart};
use hj_track::config::RunConfig;
use hj_track::scenario::Case;

#[derive(Parser)]
#[command(name = "hj-track", version, about = "Generating-function trajectory tracking in the Earth-Moon PCR3BP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Start {
    /// Tracking case (I, II, III or IV); defaults to the configured cases.
    #[arg(long, conflicts_with = "dx0")]
    case: Option<Case>,
    /// Explicit initial perturbation "dx_km,dy_km,dvx_m_per_s,dvy_m_per_s".
    #[arg(long, allow_hyphen_values = true)]
    dx0: Option<String>,
    /// Navigation error seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the nominal transfer.
    Nominal {
        #[command(flatten)]
        common: Common,
    },
    /// March the generating function over the horizon.
    Train {
        #[command(flatten)]
        common: Common,
        /// Point-set seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track one case, or every configured case.
    Track {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        start: Start,
    },
    /// Sweep navigation error bound against measurement interval.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        start: Start,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let cfg = RunConfig::load(&common.config)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn start(s: &Start) -> Result<Option<TrackStart>, CliError> {
    Ok(match (&s.case, &s.dx0) {
        (Some(c), _) => Some(TrackStart::Case(*c)),
        (None, Some(v)) => Some(TrackStart::Explicit(parse_explicit(v)?)),
        (None, None) => None,
    })
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Nominal { common } => {
            let (cfg, out) = load(&common)?;
            cmd_nominal(&cfg, &out)
        }
        Command::Train { common, seed } => {
            let (cfg, out) = load(&common)?;
            cmd_train(&cfg, &out, seed)
        }
        Command::Track { common, start: s } => {
            let (cfg, out) = load(&common)?;
            cmd_track(&cfg, &out, start(&s)?, s.seed)
        }
        Command::Sweep { common, start: s } => {
            let (cfg, out) = load(&common)?;
            cmd_sweep(&cfg, &out, start(&s)?, s.seed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
