//! Command-line orchestration: configuration, run ids, output layout and the
//! `quench`, `sweep`, `shadows` and `theory` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};

pub use config::RunConfig;
pub use error::{exit, CliError};
pub use output::RunManifest;

use output::{OutputLock, PointStatus, RunDir};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Quench,
    Sweep,
    Shadows,
    Theory,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Quench => "quench",
            Command::Sweep => "sweep",
            Command::Shadows => "shadows",
            Command::Theory => "theory",
        }
    }
}

/// Everything a run needs besides the configuration itself.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub out: PathBuf,
    /// Run id to resume; must equal the id of the configuration.
    pub resume: Option<String>,
}

/// Validates, locks the output root, runs the command and writes the
/// manifest. Returns the run directory.
pub fn run(config: &RunConfig, inv: &Invocation) -> Result<PathBuf, CliError> {
    config.validate()?;
    let run_id = config.run_id(inv.command.name());
    if let Some(r) = &inv.resume {
        if *r != run_id {
            return Err(CliError::schema(
                "--resume",
                format!("run {r} does not match this configuration (its run id is {run_id})"),
            ));
        }
    }
    let _lock = OutputLock::acquire(&inv.out)?;
    let started = output::unix_now();
    let mut dir = RunDir::open(&inv.out, &run_id, inv.resume.is_some())?;
    log::info!("{} run {run_id} in {}", inv.command.name(), dir.root.display());
    dir.write_bytes("config.toml", config.to_toml().as_bytes())?;
    let points: Vec<PointStatus> = match inv.command {
        Command::Quench => commands::cmd_quench(config, &run_id, &mut dir)?,
        Command::Sweep => commands::cmd_sweep(config, &run_id, &mut dir, inv.resume.is_some())?,
        Command::Shadows => commands::cmd_shadows(config, &run_id, &mut dir)?,
        Command::Theory => commands::cmd_theory(config, &run_id, &mut dir)?,
    };
    let partial = points.iter().any(|p| p.status == "failed");
    let manifest = RunManifest {
        run_id: run_id.clone(),
        command: inv.command.name().to_string(),
        code_version: config::CODE_VERSION.to_string(),
        seed: config.seed,
        started_unix: started,
        finished_unix: output::unix_now(),
        status: if partial { "partial" } else { "ok" }.to_string(),
        points,
        files: RunManifest::file_entries(&dir)?,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(stark_magic::Error::from)? + "\n";
    let path = dir.path(output::MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(dir.root)
}

/// Loads the configuration of an earlier run from its directory.
pub fn config_of_run(out: &Path, run_id: &str) -> Result<RunConfig, CliError> {
    RunConfig::from_file(&out.join(run_id).join("config.toml"))
}
