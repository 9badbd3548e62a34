use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stark_magic_cli::{config_of_run, exit, run, CliError, Command, Invocation, RunConfig};

/// Magic and entanglement dynamics of the tilted transverse-field Ising chain.
#[derive(Parser, Debug)]
#[command(name = "stark-magic", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Quench traces of M2, entanglement and energy.
    Quench(Common),
    /// Saturation sweep over (L, F), crossover tables and collapse fits.
    Sweep(Common),
    /// Randomized-measurement estimators along the quench.
    Shadows(Common),
    /// Schrieffer–Wolff coefficients, J_eff profiles, fronts and closure fits.
    Theory(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(long, env = "STARKMAGIC_CONFIG")]
    config: Option<PathBuf>,
    /// Output root (default: `out` from the config, else `./runs`).
    #[arg(long, env = "STARKMAGIC_OUT")]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, env = "STARKMAGIC_SEED")]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, env = "STARKMAGIC_THREADS")]
    threads: Option<usize>,
    /// Resume an interrupted run with this id.
    #[arg(long, env = "STARKMAGIC_RESUME")]
    resume: Option<String>,
}

fn execute(command: Command, c: Common) -> Result<PathBuf, CliError> {
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::schema("--threads", e.to_string()))?;
    }
    let out_flag = c.out.clone();
    let mut config = match (&c.config, &c.resume) {
        (Some(path), _) => RunConfig::from_file(path)?,
        (None, Some(id)) => config_of_run(out_flag.as_deref().unwrap_or("runs".as_ref()), id)?,
        (None, None) => return Err(CliError::schema("--config", "a configuration file is required")),
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    let out = out_flag.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let inv = Invocation {
        command,
        out,
        resume: c.resume,
    };
    run(&config, &inv)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Quench(c) => (Command::Quench, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Shadows(c) => (Command::Shadows, c),
        Cmd::Theory(c) => (Command::Theory, c),
    };
    match execute(command, common) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
